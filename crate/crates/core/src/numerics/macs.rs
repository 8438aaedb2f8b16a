use std::cell::Cell;

// Counter of multiply-accumulates actually executed by the kernels on this
// thread. Each kernel tallies its own loop trips into a local and reports
// once per call, so the instrumentation costs nothing measurable.
thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
    static ENABLED: Cell<bool> = const { Cell::new(false) };
}

/// Reset the counter and start recording on this thread.
pub fn start() {
    MACS.with(|m| m.set(0));
    ENABLED.with(|e| e.set(true));
}

/// Stop recording and return the tally.
pub fn stop() -> u64 {
    ENABLED.with(|e| e.set(false));
    MACS.with(|m| m.get())
}

#[inline]
pub(crate) fn add(n: u64) {
    ENABLED.with(|e| {
        if e.get() {
            MACS.with(|m| m.set(m.get() + n));
        }
    });
}
