#include "psp/rng.hpp"

#include <cmath>
#include <numbers>

namespace psp {

double CounterRng::next_gaussian() noexcept {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

Tensor gaussian_tensor(Shape shape, std::uint64_t key, float stddev) {
    Tensor out(std::move(shape));
    CounterRng rng(key);
    for (float& v : out.data()) v = static_cast<float>(rng.next_gaussian() * stddev);
    return out;
}

}  // namespace psp
