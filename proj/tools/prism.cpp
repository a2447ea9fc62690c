#include <iostream>

#include "prism/cli.hpp"

int main(int argc, char** argv) { return prism::run_cli(argc, argv, std::cout, std::cerr); }
