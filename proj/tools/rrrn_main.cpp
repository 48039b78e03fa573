#include <iostream>

#include "rrrn/cli.hpp"

int main(int argc, char** argv) { return rrrn::run_cli(argc, argv, std::cout, std::cerr); }
