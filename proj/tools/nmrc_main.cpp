#include "nmrc/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return nmrc::cli::run(argc, argv, std::cout, std::cerr); }
