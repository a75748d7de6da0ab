#include "volterra/quadrature.hpp"

#include <boost/math/quadrature/gauss.hpp>

namespace volterra::quad {

namespace {

template <int N>
Rule make_rule() {
    using boost::math::quadrature::gauss;
    const auto& x = gauss<double, N>::abscissa();
    const auto& w = gauss<double, N>::weights();
    Rule rule;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] == 0.0) {
            rule.nodes.push_back(0.5);
            rule.weights.push_back(0.5 * w[i]);
        } else {
            rule.nodes.push_back(0.5 - 0.5 * x[i]);
            rule.weights.push_back(0.5 * w[i]);
            rule.nodes.push_back(0.5 + 0.5 * x[i]);
            rule.weights.push_back(0.5 * w[i]);
        }
    }
    return rule;
}

} // namespace

const Rule& gauss_legendre(int order) {
    static const Rule r7 = make_rule<7>();
    static const Rule r10 = make_rule<10>();
    static const Rule r15 = make_rule<15>();
    static const Rule r20 = make_rule<20>();
    static const Rule r25 = make_rule<25>();
    static const Rule r30 = make_rule<30>();
    switch (order) {
    case 7: return r7;
    case 10: return r10;
    case 15: return r15;
    case 20: return r20;
    case 25: return r25;
    case 30: return r30;
    default: throw std::invalid_argument("unsupported Gauss-Legendre order " + std::to_string(order));
    }
}

} // namespace volterra::quad
