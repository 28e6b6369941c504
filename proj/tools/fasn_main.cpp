#include <iostream>

#include "fasn/cli.hpp"

int main(int argc, char** argv) { return fasn::run_cli(argc, argv, std::cout, std::cerr); }
