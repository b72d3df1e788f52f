//! Client for the model bridge: newline-delimited JSON over TCP (or any
//! byte stream pair).
//!
//! Requests, one per line:
//!
//! ```text
//! {"op":"register_image","image_id":"q1","image_path":"/data/q1.png"}
//! {"op":"features","image_id":"q1","image_path":"/data/q1.png"}
//! {"op":"segment","image_id":"q1","points":[[12,40,1],[3,4,0]],"box":[0,0,63,63]}
//! ```
//!
//! Responses, one per request and in request order:
//!
//! ```text
//! {"ok":true,"image_id":"q1","height":1024,"width":1024}
//! {"ok":true,"image_id":"q1","tensor_path":"/tmp/q1.npy"}
//! {"ok":true,"image_id":"q1","rle":"0 5 …","height":1024,"width":1024}
//! {"ok":false,"error":"UnknownImage","message":"…"}
//! ```
//!
//! Point labels are 1 for positive and 0 for negative clicks.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pir::PromptSet;
use crate::segmenter::{rle, PromptableSegmenter, SegmenterBackend};
use crate::tensor_io::{load_npy_tensor, BinaryMask, FeatureGrid};

#[derive(Debug, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request<'a> {
    RegisterImage {
        image_id: &'a str,
        image_path: &'a str,
    },
    Features {
        image_id: &'a str,
        image_path: &'a str,
    },
    Segment {
        image_id: &'a str,
        points: Vec<[usize; 3]>,
        #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
        bbox: Option<[usize; 4]>,
    },
}

#[derive(Debug, Default, Deserialize)]
struct Response {
    ok: bool,
    #[serde(default)]
    image_id: Option<String>,
    #[serde(default)]
    tensor_path: Option<String>,
    #[serde(default)]
    rle: Option<String>,
    #[serde(default)]
    height: Option<usize>,
    #[serde(default)]
    width: Option<usize>,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    message: Option<String>,
}

/// Serializes a segment request exactly as it goes on the wire (without the newline).
pub fn segment_request_line(image_id: &str, prompts: &PromptSet) -> String {
    let points = prompts
        .positives
        .iter()
        .map(|&(x, y)| [x, y, 1])
        .chain(prompts.negatives.iter().map(|&(x, y)| [x, y, 0]))
        .collect();
    let req = Request::Segment {
        image_id,
        points,
        bbox: prompts.bbox.map(|(x0, y0, x1, y1)| [x0, y0, x1, y1]),
    };
    serde_json::to_string(&req).expect("request serializes")
}

/// One request in flight at a time.
pub struct BridgeClient<R, W> {
    reader: R,
    writer: W,
}

impl BridgeClient<BufReader<TcpStream>, TcpStream> {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self> {
        let addr = addr
            .to_socket_addrs()
            .map_err(|e| Error::Protocol(format!("bad bridge address: {e}")))?
            .next()
            .ok_or_else(|| Error::Protocol("bridge address resolved to nothing".into()))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(map_io)?;
        stream.set_read_timeout(Some(timeout)).map_err(map_io)?;
        stream.set_write_timeout(Some(timeout)).map_err(map_io)?;
        let reader = BufReader::new(stream.try_clone().map_err(map_io)?);
        Ok(Self::new(reader, stream))
    }
}

fn map_io(e: std::io::Error) -> Error {
    match e.kind() {
        ErrorKind::TimedOut | ErrorKind::WouldBlock => Error::Timeout,
        _ => Error::Protocol(e.to_string()),
    }
}

impl<R: BufRead, W: Write> BridgeClient<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer }
    }

    fn call(&mut self, line: &str) -> Result<Response> {
        self.writer.write_all(line.as_bytes()).map_err(map_io)?;
        self.writer.write_all(b"\n").map_err(map_io)?;
        self.writer.flush().map_err(map_io)?;

        let mut buf = String::new();
        let n = self.reader.read_line(&mut buf).map_err(map_io)?;
        if n == 0 {
            return Err(Error::Protocol("bridge closed the connection".into()));
        }
        let resp: Response = serde_json::from_str(buf.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response line: {e}")))?;
        if !resp.ok {
            let code = resp.error.clone().unwrap_or_else(|| "Unknown".into());
            let message = resp.message.clone().unwrap_or_default();
            return Err(match code.as_str() {
                "UnknownImage" => Error::UnknownImage(resp.image_id.unwrap_or(message)),
                "Timeout" => Error::Timeout,
                _ => Error::SegmenterFailure(format!("{code}: {message}")),
            });
        }
        Ok(resp)
    }

    fn dims_of(resp: &Response) -> Result<(usize, usize)> {
        match (resp.height, resp.width) {
            (Some(h), Some(w)) if h > 0 && w > 0 => Ok((h, w)),
            _ => Err(Error::Protocol("response lacks positive height/width".into())),
        }
    }

    /// Registers an image; returns the segmenter raster dims.
    pub fn register_image(&mut self, image_id: &str, image_path: &Path) -> Result<(usize, usize)> {
        let line = serde_json::to_string(&Request::RegisterImage {
            image_id,
            image_path: &image_path.to_string_lossy(),
        })
        .expect("request serializes");
        let resp = self.call(&line)?;
        Self::dims_of(&resp)
    }

    /// Asks the bridge to encode an image; returns the written tensor path.
    pub fn features(&mut self, image_id: &str, image_path: &Path) -> Result<PathBuf> {
        let line = serde_json::to_string(&Request::Features {
            image_id,
            image_path: &image_path.to_string_lossy(),
        })
        .expect("request serializes");
        let resp = self.call(&line)?;
        resp.tensor_path
            .map(PathBuf::from)
            .ok_or_else(|| Error::Protocol("features response lacks tensor_path".into()))
    }

    /// Runs the segmenter and checks the mask against the expected raster dims.
    pub fn segment(
        &mut self,
        image_id: &str,
        prompts: &PromptSet,
        expected_dims: (usize, usize),
    ) -> Result<BinaryMask> {
        let resp = self.call(&segment_request_line(image_id, prompts))?;
        let dims = Self::dims_of(&resp)?;
        if dims != expected_dims {
            return Err(Error::Protocol(format!(
                "mask is {}x{}, session expects {}x{}",
                dims.0, dims.1, expected_dims.0, expected_dims.1
            )));
        }
        let text = resp
            .rle
            .as_deref()
            .ok_or_else(|| Error::Protocol("segment response lacks rle".into()))?;
        rle::decode(text, dims.0, dims.1)
    }
}

/// Segmenter session bound to one registered image.
pub struct BridgeSegmenter<R, W> {
    client: BridgeClient<R, W>,
    image_id: String,
    dims: (usize, usize),
}

impl<R: BufRead, W: Write> BridgeSegmenter<R, W> {
    pub fn register(mut client: BridgeClient<R, W>, image_id: &str, image_path: &Path) -> Result<Self> {
        let dims = client.register_image(image_id, image_path)?;
        Ok(Self {
            client,
            image_id: image_id.to_string(),
            dims,
        })
    }
}

impl<R: BufRead + Send, W: Write + Send> PromptableSegmenter for BridgeSegmenter<R, W> {
    fn output_dims(&self) -> (usize, usize) {
        self.dims
    }

    fn segment(&mut self, prompts: &PromptSet) -> Result<BinaryMask> {
        self.client.segment(&self.image_id, prompts, self.dims)
    }
}

/// Opens one TCP connection per session.
#[derive(Debug, Clone)]
pub struct BridgeBackend {
    pub addr: String,
    pub timeout: Duration,
}

impl BridgeBackend {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> Self {
        Self {
            addr: addr.into(),
            timeout,
        }
    }

    /// Has the bridge encode `image_path` and loads the resulting tensor.
    pub fn fetch_features(&self, image_id: &str, image_path: &Path) -> Result<FeatureGrid> {
        let mut client = BridgeClient::connect(self.addr.as_str(), self.timeout)?;
        let tensor = client.features(image_id, image_path)?;
        load_npy_tensor(tensor)
    }
}

impl SegmenterBackend for BridgeBackend {
    fn open(&self, image_id: &str, image_path: &Path) -> Result<Box<dyn PromptableSegmenter>> {
        let client = BridgeClient::connect(self.addr.as_str(), self.timeout)?;
        Ok(Box::new(BridgeSegmenter::register(client, image_id, image_path)?))
    }
}
