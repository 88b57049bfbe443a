#include <iostream>

#include "metaqa/cli.hpp"

int main(int argc, char** argv) { return metaqa::run_cli(argc, argv, std::cout, std::cerr); }
