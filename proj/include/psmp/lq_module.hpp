#pragma once

#include "psmp/smp_engine.hpp"

namespace psmp {

/// Linear-quadratic problem with constant coefficients.
///
///   dx = [A x + sum_i A1_i x(t + o_i) + C u_mu1] dt + [B x + sum_i B1_i x(t + o_i) + D u_mu1] dW
///   f  = <F x, x> + G1 y + G2 z + <N v, v>,  h = <Phi x1, x1>
///
/// B1 blocks and D act into the flattened d x m diffusion (column-major), so they have d*m rows.
struct LQSpec {
    TimeGrid grid;
    QWienerConfig noise;
    GelfandTriple triple;
    int dim = 1;
    int control_dim = 1;

    Matrix A;
    std::vector<Matrix> B;  // per mode, may be empty
    double alpha = 0.0;
    double lambda = 0.0;
    double K1 = 0.0;

    std::vector<std::pair<int, Matrix>> A1;
    std::vector<std::pair<int, Matrix>> B1;
    Matrix C;
    Matrix D;  // (d*m) x c, empty => 0

    Matrix F;
    double G1 = 0.0;
    Vector G2;  // m, empty => 0
    Matrix N;
    Matrix Phi;

    FiniteMeasure mu1;
    FiniteMeasure mu2;
    Vector gamma;  // constant initial path on [-K, 0]
    Vector v0;     // constant control on [-K, 0)

    RegressionBasis basis;
    ControlConstraint U;
};

struct LQCheck {
    double N_min_eig = 0.0;  // epsilon of N >= eps I
    double F_min_eig = 0.0;
    double Phi_min_eig = 0.0;
    CoercivityReport coercivity;
};

/// Validates shapes, symmetry and definiteness. Throws ValidationError on failure.
LQCheck check_lq_spec(const LQSpec& spec);

ControlProblem lq_to_problem(const LQSpec& spec);

/// u(t) = -1/2 N^{-1} E_t[sum_i w_i (C^T p + D^T Lambda q)(t - s_i) 1[t - s_i <= T - dt]] at the candidate.
Control lq_closed_form_control(const LQSpec& spec, const ControlProblem& prob, const Candidate& c);

/// Deterministic discrete LQ as an explicit quadratic J(U) = U^T H U + 2 g^T U + c0 in U = (u_0, ..., u_{N-1}).
struct QpResult {
    Control u;
    double value = 0.0;
    Matrix H;
    Vector g;
    double c0 = 0.0;
    double min_eig = 0.0;  // smallest eigenvalue of H
};

/// Needs B = B1 = D = 0, G1 = G2 = 0; throws ValidationError otherwise or when n_steps * control_dim > 2000.
QpResult lq_bruteforce_deterministic(const LQSpec& spec);

/// Quadratic value of a stacked control.
double qp_value(const QpResult& qp, const Vector& U);
/// Minimizer of the quadratic over the box lo <= u_n <= hi (projected Newton on the active set).
Vector qp_box_minimize(const QpResult& qp, const Vector& lo, const Vector& hi, int n_steps);

Vector stack_control(const Control& u, const TimeGrid& grid);

}  // namespace psmp
