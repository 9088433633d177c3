#include <pybind11/pybind11.h>
PYBIND11_MODULE(_dcelanm, m) { m.doc() = "pending"; }
