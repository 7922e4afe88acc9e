#include "seqrisk/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return seqrisk::run_cli(argc, argv, std::cout, std::cerr); }
