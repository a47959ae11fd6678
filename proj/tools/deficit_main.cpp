#include <cstdio>

int main() {
    std::puts("deficit: command-line interface under construction");
    return 1;
}
