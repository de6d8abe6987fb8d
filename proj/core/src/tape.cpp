#include "fsp/tape.hpp"

namespace fsp {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() {
    if (!g_active_tape) throw TapeError("no active tape: wrap the recording in a TapeScope");
    return g_active_tape;
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

}  // namespace fsp
