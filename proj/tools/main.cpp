#include "mokd/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return mokd::cli::run(argc, argv, std::cout, std::cerr); }
