#include <iostream>

#include "somno/cli.hpp"

int main(int argc, char** argv) { return somno::run_cli(argc, argv, std::cout, std::cerr); }
