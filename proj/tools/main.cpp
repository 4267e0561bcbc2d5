#include "dendseg/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return dendseg::cli::run(argc, argv, std::cout, std::cerr); }
