#include "mattn/cli.hpp"

int main(int argc, char** argv) { return mattn::cli_main(argc, argv); }
