#pragma once

#include "siv/common.hpp"

#include <functional>

namespace siv {

enum class LinkKind { Linear, CubicPower, Exponential, Custom };

const char* to_string(LinkKind k);

/// Outcome mean f(x; beta) and its gradient in beta for one observation.
/// Built-in kinds also have vectorized evaluation below; custom links are
/// evaluated row by row through the callbacks.
struct LinkFamily {
    using Eval = std::function<double(const Vector& x, const Vector& beta)>;
    using Jacobian = std::function<Vector(const Vector& x, const Vector& beta)>;

    LinkKind kind = LinkKind::Linear;
    Eval eval;
    Jacobian jacobian;

    static LinkFamily linear();
    static LinkFamily cubic_power();   // sum_j x_j^3 beta_j
    static LinkFamily exponential();   // exp(x^T beta), exponent clamped to [-30, 30]
    static LinkFamily custom(Eval eval, Jacobian jacobian);
};

/// Parses "linear", "cubic" or "exp".
LinkFamily link_from_name(const std::string& name);

inline constexpr double kExpClamp = 30.0;

/// f(X_i; beta) for every row. `clamped`, when given, receives the number of
/// rows whose exponent hit the clamp.
Vector link_values(const LinkFamily& link, const Matrix& x, const Vector& beta, Index* clamped = nullptr);

/// n x p matrix of d f(X_i; beta) / d beta.
Matrix link_jacobian(const LinkFamily& link, const Matrix& x, const Vector& beta);

/// Whether f is linear in beta, in which case the Jacobian does not depend on
/// beta and one Gauss-Newton step is exact.
bool link_is_linear_in_beta(const LinkFamily& link);

}  // namespace siv
