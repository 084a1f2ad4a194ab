#include "tidsit/cli.hpp"

int main(int argc, char** argv) { return tidsit::run_cli(argc, argv); }
