#include "sdml/cli.hpp"

int main(int argc, char** argv) { return sdml::cli::run(argc, argv); }
