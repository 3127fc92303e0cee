#include "mbp/parallel.hpp"

#include <cstdlib>
#include <string>

namespace mbp {

unsigned default_worker_count() {
    const char* env = std::getenv("MBPLAB_WORKERS");
    if (env == nullptr || *env == '\0') return 1;
    try {
        const long v = std::stol(env);
        return v >= 1 ? static_cast<unsigned>(v) : 1u;
    } catch (const std::exception&) {
        return 1;
    }
}

}  // namespace mbp
