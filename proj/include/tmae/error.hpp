#pragma once

#include <stdexcept>
#include <string>

namespace tmae {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
    Dimension,
    Contract,
    Config,
    Data,
    Format,
    Training,
    Generation,
};

class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

#define TMAE_DEFINE_ERROR(Name, Kind)                                          \
    class Name : public Error {                                                \
       public:                                                                 \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
    };

TMAE_DEFINE_ERROR(DimensionError, Dimension)
TMAE_DEFINE_ERROR(ContractError, Contract)
TMAE_DEFINE_ERROR(ConfigError, Config)
TMAE_DEFINE_ERROR(DataError, Data)
TMAE_DEFINE_ERROR(FormatError, Format)
TMAE_DEFINE_ERROR(TrainingError, Training)
TMAE_DEFINE_ERROR(GenerationError, Generation)

#undef TMAE_DEFINE_ERROR

/// Parse failures carry the offending line number.
class ParseError : public DataError {
   public:
    ParseError(std::size_t line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

   private:
    std::size_t line_;
};

}  // namespace tmae
