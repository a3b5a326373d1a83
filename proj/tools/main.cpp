#include "commands.hpp"

int main(int argc, char** argv) { return drio::cli::run(argc, argv); }
