#include "charannot/cli.hpp"

int main(int argc, char** argv) { return charannot::cli::run(argc, argv); }
