#include <iostream>

#include "fracdiag/cli.hpp"

int main(int argc, char** argv) { return fracdiag::dispatch(argc, argv, std::cout, std::cerr); }
