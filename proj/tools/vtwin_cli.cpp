#include "vtwin/cli.hpp"

int main(int argc, char** argv) { return vtwin::cli::run(argc, argv); }
