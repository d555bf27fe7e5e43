#include <iostream>

#include "dtdbd/cli.hpp"

int main(int argc, char** argv) { return dtdbd::run_cli(argc, argv, std::cout, std::cerr); }
