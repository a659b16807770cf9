#include "nasa/commands.hpp"

int main(int argc, char** argv) { return nasa::run_cli(argc, argv); }
