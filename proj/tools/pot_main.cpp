#include "pot/cli.hpp"

int main(int argc, char** argv) { return pot::run_cli(argc, argv); }
