#include <iostream>

#include "tmae/cli.hpp"

int main(int argc, char** argv) { return tmae::run_cli(argc, argv, std::cout, std::cerr); }
