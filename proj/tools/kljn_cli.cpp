#include <iostream>

#include "kljn/cli_harness.hpp"

int main(int argc, char** argv) { return kljn::cli::run(argc, argv, std::cout, std::cerr); }
