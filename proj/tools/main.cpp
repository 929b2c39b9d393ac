#include <iostream>

#include "critical/cli.hpp"

int main(int argc, char** argv) { return critical::cli::run(argc, argv, std::cout, std::cerr); }
