#include "dbswin/cli.hpp"

int main(int argc, char** argv) { return dbswin::cli::run(argc, argv); }
