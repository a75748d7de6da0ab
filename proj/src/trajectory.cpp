#include "volterra/trajectory.hpp"

#include <ostream>
#include <stdexcept>

#include "volterra/report.hpp"

namespace volterra {

Trajectory::Trajectory(sampling::PathGrid grid, std::size_t lag_steps, Eigen::MatrixXd states)
    : grid_(grid), lag_steps_(lag_steps), states_(std::move(states)) {
    grid_.validate();
    if (static_cast<std::size_t>(states_.cols()) != grid_.n_steps + 1)
        throw std::invalid_argument("trajectory needs one state per grid point");
    if (lag_steps_ > grid_.n_steps) throw std::invalid_argument("trajectory shorter than its delay");
}

void Trajectory::set_heads(Eigen::MatrixXd heads) {
    if (heads.rows() != states_.rows() || static_cast<std::size_t>(heads.cols()) != steps() + 1)
        throw std::invalid_argument("head series must cover the grid points t >= 0");
    heads_ = std::move(heads);
}

void Trajectory::write_csv(std::ostream& out) const {
    out << "t,coord,x,head\n";
    for (std::size_t k = 0; k < points(); ++k) {
        const std::string t = report::number(time(k), 12);
        for (std::size_t c = 0; c < dim(); ++c) {
            const auto row = static_cast<Eigen::Index>(c);
            out << t << ',' << c << ',' << report::number(states_(row, static_cast<Eigen::Index>(k)), 17) << ',';
            if (heads_ && k >= lag_steps_)
                out << report::number((*heads_)(row, static_cast<Eigen::Index>(k - lag_steps_)), 17);
            out << '\n';
        }
    }
}

} // namespace volterra
