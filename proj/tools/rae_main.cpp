#include "rae/commands.hpp"

int main(int argc, char** argv) { return rae::run_cli(argc, argv); }
