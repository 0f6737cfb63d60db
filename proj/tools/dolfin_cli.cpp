#include <iostream>

#include "dolfin/cli.hpp"

int main(int argc, char** argv) { return dolfin::run_cli(argc, argv, std::cout, std::cerr); }
