#include "gridcause/cli.hpp"

int main(int argc, char** argv) { return gridcause::cli::run(argc, argv); }
