#pragma once

// Angular-momentum coupling coefficients for half-integer spins.
//
// All public entry points take spins as doubles that must be multiples of
// 1/2; internally everything runs on doubled integers so the Racah sums are
// exact up to floating-point rounding of the factorials.

namespace cavsim {

/// |J, I, F, mF> in the coupled hyperfine basis.
struct AngularState {
  double J = 0;
  double I = 0;
  double F = 0;
  double mF = 0;

  /// Throws InvalidArgument when the quantum numbers are inconsistent.
  void validate() const;
};

/// Twice a half-integer, throwing InvalidArgument for anything else.
int twice(double half_integer);

bool triangle_ok(int two_a, int two_b, int two_c);

/// Wigner 3-j symbol (j1 j2 j3; m1 m2 m3). Returns 0 when the selection
/// rules are violated; negative spins throw.
double wigner_3j(double j1, double j2, double j3, double m1, double m2, double m3);

/// Wigner 6-j symbol {j1 j2 j3; j4 j5 j6}.
double wigner_6j(double j1, double j2, double j3, double j4, double j5, double j6);

/// <j1 m1; j2 m2 | J M>
double clebsch_gordan(double j1, double m1, double j2, double m2, double J, double M);

// Doubled-integer forms used on hot paths.
double wigner_3j_2(int tj1, int tj2, int tj3, int tm1, int tm2, int tm3);
double wigner_6j_2(int tj1, int tj2, int tj3, int tj4, int tj5, int tj6);

}  // namespace cavsim
