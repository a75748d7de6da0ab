#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "volterra/sampling.hpp"

namespace volterra {

/// Solution of a delay problem on the grid -r = t_0 < ... < T. Column k of
/// states() is x(t_k); for lifted runs heads() holds pi_0 X(t) at the grid
/// points t >= 0.
class Trajectory {
public:
    Trajectory(sampling::PathGrid grid, std::size_t lag_steps, Eigen::MatrixXd states);

    const sampling::PathGrid& grid() const { return grid_; }
    std::size_t dim() const { return static_cast<std::size_t>(states_.rows()); }
    std::size_t points() const { return static_cast<std::size_t>(states_.cols()); }
    /// Number of grid steps spanning the delay.
    std::size_t lag_steps() const { return lag_steps_; }
    /// Number of steps taken after t = 0.
    std::size_t steps() const { return points() - 1 - lag_steps_; }
    double dt() const { return grid_.dt; }
    double time(std::size_t k) const { return grid_.time(k); }
    double horizon() const { return grid_.end(); }
    /// Column index of time t_n = n dt (n = 0 is t = 0).
    std::size_t column(std::size_t n) const { return lag_steps_ + n; }

    const Eigen::MatrixXd& states() const { return states_; }
    Eigen::VectorXd x(std::size_t k) const { return states_.col(static_cast<Eigen::Index>(k)); }
    /// x at step n after t = 0.
    Eigen::VectorXd x_at_step(std::size_t n) const { return x(column(n)); }
    /// Segment x_{t_n}: columns for t_n - r .. t_n.
    auto segment(std::size_t n) const {
        return states_.middleCols(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(lag_steps_ + 1));
    }

    bool has_heads() const { return heads_.has_value(); }
    const Eigen::MatrixXd& heads() const { return *heads_; }
    Eigen::VectorXd head_at_step(std::size_t n) const { return heads_->col(static_cast<Eigen::Index>(n)); }
    void set_heads(Eigen::MatrixXd heads);

    /// Provenance of the driving noise.
    struct Provenance {
        std::string scheme;
        std::string kernel_id;
        std::uint64_t seed = 0;
        std::size_t path_id = 0;
        bool stochastic = false;
    };
    const Provenance& provenance() const { return provenance_; }
    void set_provenance(Provenance p) { provenance_ = std::move(p); }

    /// Columns t, coord, x, head (head empty before t = 0 and for direct runs).
    void write_csv(std::ostream& out) const;

private:
    sampling::PathGrid grid_;
    std::size_t lag_steps_;
    Eigen::MatrixXd states_;
    std::optional<Eigen::MatrixXd> heads_;
    Provenance provenance_;
};

} // namespace volterra
