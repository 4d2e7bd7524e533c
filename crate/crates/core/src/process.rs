//! Child-process execution with resource limits, a hard deadline, CPU
//! accounting from `wait4`, and optional `/proc/<pid>/status` sampling.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

/// Output kept per stream; the rest is drained and dropped.
const CAPTURE_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone, Default)]
pub(crate) struct Limits {
    pub address_space_bytes: Option<u64>,
    pub max_processes: Option<u64>,
    pub isolate_network: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Exit {
    Code(i32),
    Signal(i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SampleSource {
    /// VmData + VmStk from the process status file.
    VmDataStk,
    /// No status samples were taken; peak RSS from rusage stands in.
    RusageMaxRss,
}

#[derive(Debug, Clone)]
pub(crate) struct Sampling {
    pub interval: Duration,
    /// Sample the first child of the spawned process (a wrapper like `perf`).
    pub through_wrapper: bool,
}

#[derive(Debug)]
pub(crate) struct RunOutcome {
    pub exit: Exit,
    pub timed_out: bool,
    pub stdout: String,
    pub stderr: String,
    pub wall: Duration,
    /// User + system CPU time of the child and its reaped descendants.
    pub cpu: Duration,
    pub max_rss_kib: u64,
    pub memory_samples_kib: Vec<u64>,
    pub sample_source: SampleSource,
}

impl RunOutcome {
    pub fn success(&self) -> bool {
        !self.timed_out && self.exit == Exit::Code(0)
    }
}

fn pipe_reader<R: Read + Send + 'static>(mut r: R) -> JoinHandle<String> {
    std::thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match r.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = CAPTURE_LIMIT.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        String::from_utf8_lossy(&kept).into_owned()
    })
}

/// Sum of VmData and VmStk in KiB, if the status file has them.
pub(crate) fn read_vm_data_stk(pid: u32) -> Option<u64> {
    let text = std::fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    parse_vm_data_stk(&text)
}

pub(crate) fn parse_vm_data_stk(status: &str) -> Option<u64> {
    let field = |name: &str| {
        status.lines().find_map(|l| {
            let rest = l.strip_prefix(name)?.strip_prefix(':')?;
            rest.split_whitespace().next()?.parse::<u64>().ok()
        })
    };
    Some(field("VmData")? + field("VmStk")?)
}

fn first_child(pid: u32) -> Option<u32> {
    let text = std::fs::read_to_string(format!("/proc/{pid}/task/{pid}/children")).ok()?;
    text.split_whitespace().next()?.parse().ok()
}

fn timeval(tv: libc::timeval) -> Duration {
    Duration::from_secs(tv.tv_sec as u64) + Duration::from_micros(tv.tv_usec as u64)
}

/// Spawn `argv` in `cwd` and wait up to `timeout`, killing the whole process
/// group at the deadline.
pub(crate) fn run(
    argv: &[String],
    cwd: &Path,
    env: &[(String, String)],
    limits: &Limits,
    timeout: Duration,
    sampling: Option<&Sampling>,
) -> std::io::Result<RunOutcome> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"))?;
    let mut cmd = Command::new(program);
    cmd.args(args).current_dir(cwd).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    for (k, v) in env {
        cmd.env(k, v);
    }
    let limits = limits.clone();
    // SAFETY: only async-signal-safe syscalls run between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            libc::setpgid(0, 0);
            if let Some(bytes) = limits.address_space_bytes {
                let lim = libc::rlimit { rlim_cur: bytes as libc::rlim_t, rlim_max: bytes as libc::rlim_t };
                libc::setrlimit(libc::RLIMIT_AS, &lim);
            }
            if let Some(n) = limits.max_processes {
                let lim = libc::rlimit { rlim_cur: n as libc::rlim_t, rlim_max: n as libc::rlim_t };
                libc::setrlimit(libc::RLIMIT_NPROC, &lim);
            }
            if limits.isolate_network {
                // Needs CAP_SYS_ADMIN; without it the child keeps the host network.
                libc::unshare(libc::CLONE_NEWNET);
            }
            Ok(())
        });
    }
    let started = Instant::now();
    let mut child = cmd.spawn()?;
    let pid = child.id();
    let out = pipe_reader(child.stdout.take().expect("piped stdout"));
    let err = pipe_reader(child.stderr.take().expect("piped stderr"));
    let deadline = started + timeout;
    let poll = sampling.map(|s| s.interval).unwrap_or(Duration::from_millis(2));
    let mut samples = Vec::new();
    let mut target = if sampling.is_some_and(|s| s.through_wrapper) { None } else { Some(pid) };

    // Reap on a separate thread so exit is seen at once, not at the next poll.
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let mut status: libc::c_int = 0;
        // SAFETY: rusage is plain old data; zeroed is a valid value.
        let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
        let r = loop {
            // SAFETY: pid is our unreaped child; status and usage are valid out-pointers.
            let r = unsafe { libc::wait4(pid as libc::pid_t, &mut status, 0, &mut usage) };
            if r >= 0 || std::io::Error::last_os_error().kind() != std::io::ErrorKind::Interrupted {
                break r;
            }
        };
        let res = if r < 0 { Err(std::io::Error::last_os_error()) } else { Ok((status, usage, Instant::now())) };
        let _ = tx.send(res);
    });
    let mut timed_out = false;
    let (status, usage, exited) = loop {
        if sampling.is_some() {
            if target.is_none() {
                target = first_child(pid);
            }
            if let Some(kib) = target.and_then(read_vm_data_stk) {
                samples.push(kib);
            }
        }
        let now = Instant::now();
        if now >= deadline {
            timed_out = true;
            // SAFETY: signalling our own process group.
            unsafe {
                libc::killpg(pid as libc::pid_t, libc::SIGKILL);
                libc::kill(pid as libc::pid_t, libc::SIGKILL);
            }
            break rx.recv().map_err(|_| std::io::Error::other("waiter vanished"))??;
        }
        match rx.recv_timeout(poll.min(deadline - now)) {
            Ok(r) => break r?,
            Err(std::sync::mpsc::RecvTimeoutError::Timeout) => {}
            Err(std::sync::mpsc::RecvTimeoutError::Disconnected) => return Err(std::io::Error::other("waiter vanished")),
        }
    };
    let wall = exited.duration_since(started);
    // Reap stragglers left in the group so the pipes close.
    // SAFETY: signalling our own process group; failure is harmless.
    unsafe {
        libc::killpg(pid as libc::pid_t, libc::SIGKILL);
    }
    drop(child);
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    let exit = if libc::WIFSIGNALED(status) { Exit::Signal(libc::WTERMSIG(status)) } else { Exit::Code(libc::WEXITSTATUS(status)) };
    let max_rss_kib = usage.ru_maxrss.max(0) as u64;
    let sample_source = if samples.is_empty() { SampleSource::RusageMaxRss } else { SampleSource::VmDataStk };
    Ok(RunOutcome {
        exit,
        timed_out,
        stdout,
        stderr,
        wall,
        cpu: timeval(usage.ru_utime) + timeval(usage.ru_stime),
        max_rss_kib,
        memory_samples_kib: samples,
        sample_source,
    })
}
