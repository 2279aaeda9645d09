#include "epgrpo/cli.hpp"

int main(int argc, char** argv) { return epgrpo::run_cli(argc, argv); }
