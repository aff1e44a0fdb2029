#include <iostream>

#include "advx/cli.hpp"

int main(int argc, char** argv) { return advx::cli::run(argc, argv, std::cout, std::cerr); }
