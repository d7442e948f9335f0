#include "mmspec/mmspec.hpp"
int main() { return 0; }
