#pragma once

// libtorch's logging headers define CHECK; doctest's assertion macro replaces it.
#ifdef CHECK
#undef CHECK
#endif
#include <doctest.h>
