#include "pdm/cli.hpp"

int main(int argc, char** argv) { return pdm::cli::main(argc, argv); }
