#include "phrasal/cli.h"

int main(int argc, char** argv) { return phrasal::cli::run(argc, argv); }
