#include <cstddef>

void draw(char *pixels, std::size_t n);

int render(std::size_t n)
{
	char *pixels = new char[n];
	draw(pixels, n);
	delete[] pixels;
	return 0;
}
