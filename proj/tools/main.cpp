#include <iostream>

#include "rerand/cli.hpp"

int main(int argc, char** argv) { return rerand::run_cli(argc, argv, std::cout, std::cerr); }
