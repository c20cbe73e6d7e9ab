#include "siv/link.hpp"

#include <algorithm>
#include <cmath>

namespace siv {

const char* to_string(LinkKind k) {
    switch (k) {
        case LinkKind::Linear:
            return "linear";
        case LinkKind::CubicPower:
            return "cubic";
        case LinkKind::Exponential:
            return "exp";
        default:
            return "custom";
    }
}

LinkFamily LinkFamily::linear() {
    LinkFamily f;
    f.kind = LinkKind::Linear;
    f.eval = [](const Vector& x, const Vector& b) { return x.dot(b); };
    f.jacobian = [](const Vector& x, const Vector&) { return x; };
    return f;
}

LinkFamily LinkFamily::cubic_power() {
    LinkFamily f;
    f.kind = LinkKind::CubicPower;
    f.eval = [](const Vector& x, const Vector& b) { return x.array().cube().matrix().dot(b); };
    f.jacobian = [](const Vector& x, const Vector&) { return Vector(x.array().cube()); };
    return f;
}

LinkFamily LinkFamily::exponential() {
    LinkFamily f;
    f.kind = LinkKind::Exponential;
    f.eval = [](const Vector& x, const Vector& b) {
        return std::exp(std::clamp(x.dot(b), -kExpClamp, kExpClamp));
    };
    f.jacobian = [](const Vector& x, const Vector& b) {
        return Vector(std::exp(std::clamp(x.dot(b), -kExpClamp, kExpClamp)) * x);
    };
    return f;
}

LinkFamily LinkFamily::custom(Eval eval, Jacobian jacobian) {
    if (!eval || !jacobian) {
        throw InputError("custom link needs both an evaluator and a Jacobian");
    }
    LinkFamily f;
    f.kind = LinkKind::Custom;
    f.eval = std::move(eval);
    f.jacobian = std::move(jacobian);
    return f;
}

LinkFamily link_from_name(const std::string& name) {
    if (name == "linear") return LinkFamily::linear();
    if (name == "cubic") return LinkFamily::cubic_power();
    if (name == "exp") return LinkFamily::exponential();
    throw InputError("unknown link '" + name + "' (expected linear, cubic or exp)");
}

bool link_is_linear_in_beta(const LinkFamily& link) {
    return link.kind == LinkKind::Linear || link.kind == LinkKind::CubicPower;
}

Vector link_values(const LinkFamily& link, const Matrix& x, const Vector& beta, Index* clamped) {
    if (x.cols() != beta.size()) {
        throw DimensionError("link evaluation: beta length does not match the number of exposures");
    }
    if (clamped) *clamped = 0;
    switch (link.kind) {
        case LinkKind::Linear:
            return x * beta;
        case LinkKind::CubicPower:
            return x.array().cube().matrix() * beta;
        case LinkKind::Exponential: {
            Vector eta = x * beta;
            Index hits = 0;
            for (Index i = 0; i < eta.size(); ++i) {
                if (std::abs(eta(i)) > kExpClamp) {
                    eta(i) = std::clamp(eta(i), -kExpClamp, kExpClamp);
                    ++hits;
                }
            }
            if (clamped) *clamped = hits;
            return eta.array().exp();
        }
        default: {
            Vector out(x.rows());
            Vector row(x.cols());
            for (Index i = 0; i < x.rows(); ++i) {
                row = x.row(i).transpose();
                out(i) = link.eval(row, beta);
            }
            return out;
        }
    }
}

Matrix link_jacobian(const LinkFamily& link, const Matrix& x, const Vector& beta) {
    switch (link.kind) {
        case LinkKind::Linear:
            return x;
        case LinkKind::CubicPower:
            return x.array().cube();
        case LinkKind::Exponential: {
            const Vector eta = (x * beta).array().min(kExpClamp).max(-kExpClamp);
            return eta.array().exp().matrix().asDiagonal() * x;
        }
        default: {
            Matrix out(x.rows(), x.cols());
            Vector row(x.cols());
            for (Index i = 0; i < x.rows(); ++i) {
                row = x.row(i).transpose();
                out.row(i) = link.jacobian(row, beta).transpose();
            }
            return out;
        }
    }
}

}  // namespace siv
