#include "uvcgan/cli.hpp"

int main(int argc, char** argv) { return uvcgan::cli::run(argc, argv); }
