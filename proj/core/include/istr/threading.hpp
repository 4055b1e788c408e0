#pragma once

namespace istr {

// Worker cap for parallel regions. Reads ISTR_THREADS once (values < 1 are
// ignored); otherwise min(hardware_concurrency, 8). Always >= 1.
int thread_count();

}  // namespace istr
