#include "asyppo/cli.hpp"

int main(int argc, char** argv) { return asyppo::cli(argc, argv); }
