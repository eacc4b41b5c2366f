use std::thread;

use super::{record_step, AttentionTrace, CountMatrix};
use crate::decoding::{decode_baseline_observed, DecodeParams, LogitSource};
use crate::error::{Error, Result};
use crate::model::{MultimodalSequence, TokenId};
use crate::scalar::Scalar;

fn params(gen_len: usize, stop_token: Option<TokenId>) -> DecodeParams {
    DecodeParams {
        stop_token,
        ..DecodeParams::greedy(0.0, gen_len)
    }
}

fn profile_range<T, S>(
    model: &S,
    corpus: &[MultimodalSequence],
    first_prompt: usize,
    gen_len: usize,
    stop_token: Option<TokenId>,
    mut sink: impl FnMut(usize, super::HeadGrid<f64>) -> Result<()>,
) -> Result<()>
where
    T: Scalar,
    S: LogitSource<T>,
{
    let params = params(gen_len, stop_token);
    for (i, prompt) in corpus.iter().enumerate() {
        let span = prompt.image_span();
        decode_baseline_observed(model, prompt, &params, |_, step| {
            sink(first_prompt + i, record_step(step, span.clone())?)
        })?;
    }
    Ok(())
}

/// Greedy-decodes every prompt for up to `gen_len` tokens (stopping early
/// after `stop_token`) and records the image mass of every head at every
/// generated token. Prefill positions are not recorded.
pub fn profile<T, S>(
    model: &S,
    corpus: &[MultimodalSequence],
    gen_len: usize,
    stop_token: Option<TokenId>,
) -> Result<AttentionTrace>
where
    T: Scalar,
    S: LogitSource<T>,
{
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (layers, heads) = model.head_shape();
    let mut trace = AttentionTrace::new(layers, heads);
    profile_range(model, corpus, 0, gen_len, stop_token, |p, e| trace.push(e, p))?;
    Ok(trace)
}

fn chunks(len: usize, workers: usize) -> Vec<(usize, usize)> {
    let workers = workers.clamp(1, len.max(1));
    let base = len / workers;
    let extra = len % workers;
    let mut out = Vec::with_capacity(workers);
    let mut start = 0;
    for w in 0..workers {
        let n = base + usize::from(w < extra);
        out.push((start, start + n));
        start += n;
    }
    out
}

/// [`profile`] over contiguous corpus chunks on `workers` threads. The
/// chunks are concatenated in corpus order, so the result equals the
/// sequential trace.
pub fn profile_parallel<T, S>(
    model: &S,
    corpus: &[MultimodalSequence],
    gen_len: usize,
    stop_token: Option<TokenId>,
    workers: usize,
) -> Result<AttentionTrace>
where
    T: Scalar,
    S: LogitSource<T> + Sync,
{
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (layers, heads) = model.head_shape();
    let parts: Vec<Result<AttentionTrace>> = thread::scope(|scope| {
        let handles: Vec<_> = chunks(corpus.len(), workers)
            .into_iter()
            .map(|(a, b)| {
                scope.spawn(move || {
                    let mut t = AttentionTrace::new(layers, heads);
                    profile_range(model, &corpus[a..b], a, gen_len, stop_token, |p, e| t.push(e, p))?;
                    Ok(t)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("profiling worker panicked"))
            .collect()
    });
    let mut trace = AttentionTrace::new(layers, heads);
    for part in parts {
        trace.append(part?)?;
    }
    Ok(trace)
}

/// Streaming variant of `count_exceedances(profile(..), tau)`: each worker
/// keeps only a [`CountMatrix`] and the partial counts are summed.
pub fn profile_counts<T, S>(
    model: &S,
    corpus: &[MultimodalSequence],
    gen_len: usize,
    stop_token: Option<TokenId>,
    tau: f64,
    workers: usize,
) -> Result<CountMatrix>
where
    T: Scalar,
    S: LogitSource<T> + Sync,
{
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (layers, heads) = model.head_shape();
    let total = CountMatrix::zeros(layers, heads, tau)?;
    let parts: Vec<Result<CountMatrix>> = thread::scope(|scope| {
        let handles: Vec<_> = chunks(corpus.len(), workers)
            .into_iter()
            .map(|(a, b)| {
                let mut counts = total.clone();
                scope.spawn(move || {
                    profile_range(model, &corpus[a..b], a, gen_len, stop_token, |_, e| {
                        counts.observe(&e)
                    })?;
                    Ok(counts)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("profiling worker panicked"))
            .collect()
    });
    let mut total = total;
    for part in parts {
        total.merge(&part?)?;
    }
    Ok(total)
}
