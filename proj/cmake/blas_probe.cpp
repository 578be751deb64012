// Exits nonzero when the BLAS in use multiplies a 256x256 matrix incorrectly.
#include <cmath>
#include <cstdio>
#include <vector>

extern "C" void dgemm_(const char*, const char*, const int*, const int*, const int*, const double*,
                       const double*, const int*, const double*, const int*, const double*, double*,
                       const int*);

int main() {
  const int n = 256;
  std::vector<double> a(n * n), b(n * n), c(n * n, 0.0);
  for (int i = 0; i < n * n; ++i) {
    a[i] = std::sin(0.37 * i);
    b[i] = std::cos(0.11 * i);
  }
  const double one = 1.0, zero = 0.0;
  dgemm_("N", "N", &n, &n, &n, &one, a.data(), &n, b.data(), &n, &zero, c.data(), &n);
  double err = 0.0;
  for (int j = 0; j < n; j += 17) {
    for (int i = 0; i < n; i += 13) {
      double ref = 0.0;
      for (int k = 0; k < n; ++k) ref += a[i + k * n] * b[k + j * n];
      err = std::fmax(err, std::fabs(ref - c[i + j * n]));
    }
  }
  std::printf("%g\n", err);
  return err < 1e-9 ? 0 : 1;
}
