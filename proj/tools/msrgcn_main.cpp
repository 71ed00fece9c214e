#include <iostream>

#include "msrgcn/cli.hpp"

int main(int argc, char** argv) { return msrgcn::cli::run(argc, argv, std::cout, std::cerr); }
