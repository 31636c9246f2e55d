#include "commands.hpp"

int main(int argc, char** argv) { return lift::cli::run(argc, argv); }
