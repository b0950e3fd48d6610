#include <iostream>

#include "uavfed/cli.hpp"

int main(int argc, char** argv) { return uavfed::run_cli(argc, argv, std::cout, std::cerr); }
