"""WAV ingestion/emission: 16-bit PCM or float, mono (stereo downmixed)."""

import numpy as np
from scipy.io import wavfile


def read_wav(path):
    """Returns (float64 samples in [-1, 1], sample_rate); stereo is averaged."""
    sr, data = wavfile.read(path)
    data = np.asarray(data)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format: {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return samples, int(sr)


def write_wav(path, samples, sr, fmt="pcm16"):
    samples = np.asarray(samples, dtype=np.float64)
    if fmt == "pcm16":
        clipped = np.clip(samples, -1.0, 1.0)
        wavfile.write(path, int(sr), (clipped * 32767.0).astype(np.int16))
    elif fmt == "float32":
        wavfile.write(path, int(sr), samples.astype(np.float32))
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    return path
