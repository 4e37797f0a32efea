#include <iostream>

#include "bdg/commands.hpp"

int main(int argc, char** argv) { return bdg::run_cli(argc, argv, std::cout, std::cerr); }
