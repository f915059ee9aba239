#include "atgnn/cli.hpp"

int main(int argc, char** argv) { return atgnn::cli::run(argc, argv); }
