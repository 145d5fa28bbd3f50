//! Modbus RTU framing for the Read Holding Registers function (0x03).
//!
//! Both sides of the exchange are covered: the master encodes requests and
//! decodes responses, the slave decodes requests and encodes responses or
//! exception frames. The serial channel is message oriented, so frames are
//! complete octet sequences and the RTU inter-frame silence is not modelled.
//!
//! Every frame ends with the Modbus CRC-16, low byte first.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Function code for Read Holding Registers.
pub const READ_HOLDING_REGISTERS: u8 = 0x03;
/// Bit set on the function byte of an exception response.
pub const EXCEPTION_FLAG: u8 = 0x80;
/// Largest register count a single 0x03 request may ask for.
pub const MAX_READ_COUNT: u16 = 125;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModbusError {
    #[error("device address {0} outside 1..=247")]
    InvalidAddress(u8),
    #[error("register count {0} outside 1..=125")]
    InvalidCount(usize),
    #[error("register span starting at {start} with {count} registers exceeds the address space")]
    InvalidRange { start: u16, count: u16 },
    #[error("exception code {0} is not supported")]
    InvalidExceptionCode(u8),
    #[error("crc mismatch: frame carries {found:#06x}, computed {computed:#06x}")]
    CrcMismatch { computed: u16, found: u16 },
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
    #[error("unsupported function code {0:#04x}")]
    UnsupportedFunction(u8),
    #[error("expected {expected} registers, response carries {found}")]
    CountMismatch { expected: usize, found: usize },
}

pub type Result<T, E = ModbusError> = std::result::Result<T, E>;

const CRC_TABLE: [u16; 256] = build_crc_table();

const fn build_crc_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u16;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0xA001
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

/// Modbus CRC-16: initial value 0xFFFF, reflected polynomial 0xA001.
pub fn crc16(data: &[u8]) -> u16 {
    data.iter().fold(0xFFFF, |crc, &b| {
        (crc >> 8) ^ CRC_TABLE[((crc ^ b as u16) & 0xFF) as usize]
    })
}

/// A slave address. Broadcast (0) is not supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DeviceAddress(u8);

impl DeviceAddress {
    /// Address of the single charge controller on the bus.
    pub const CONTROLLER: DeviceAddress = DeviceAddress(1);

    pub fn new(value: u8) -> Result<Self> {
        if (1..=247).contains(&value) {
            Ok(DeviceAddress(value))
        } else {
            Err(ModbusError::InvalidAddress(value))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for DeviceAddress {
    type Error = ModbusError;

    fn try_from(value: u8) -> Result<Self> {
        DeviceAddress::new(value)
    }
}

impl From<DeviceAddress> for u8 {
    fn from(a: DeviceAddress) -> u8 {
        a.0
    }
}

impl fmt::Display for DeviceAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadRequest {
    device: DeviceAddress,
    start: u16,
    count: u16,
}

impl ReadRequest {
    pub fn new(device: DeviceAddress, start: u16, count: u16) -> Result<Self> {
        if count == 0 || count > MAX_READ_COUNT {
            return Err(ModbusError::InvalidCount(count as usize));
        }
        if start as u32 + count as u32 > 0x1_0000 {
            return Err(ModbusError::InvalidRange { start, count });
        }
        Ok(ReadRequest {
            device,
            start,
            count,
        })
    }

    pub fn device(&self) -> DeviceAddress {
        self.device
    }

    pub fn start(&self) -> u16 {
        self.start
    }

    pub fn count(&self) -> u16 {
        self.count
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadResponse {
    pub device: DeviceAddress,
    pub values: Vec<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ExceptionCode {
    IllegalFunction = 1,
    IllegalDataAddress = 2,
    IllegalDataValue = 3,
}

impl TryFrom<u8> for ExceptionCode {
    type Error = ModbusError;

    fn try_from(code: u8) -> Result<Self> {
        match code {
            1 => Ok(ExceptionCode::IllegalFunction),
            2 => Ok(ExceptionCode::IllegalDataAddress),
            3 => Ok(ExceptionCode::IllegalDataValue),
            other => Err(ModbusError::InvalidExceptionCode(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExceptionResponse {
    pub device: DeviceAddress,
    pub code: ExceptionCode,
}

/// What a master can get back for a read request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadOutcome {
    Registers(ReadResponse),
    Exception(ExceptionResponse),
}

/// A complete RTU frame including its trailing CRC.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct WireFrame(Vec<u8>);

impl WireFrame {
    /// Wraps raw octets without checking them.
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        WireFrame(bytes.into())
    }

    /// Appends the CRC to `body` and wraps the result.
    fn seal(mut body: Vec<u8>) -> Self {
        let crc = crc16(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        WireFrame(body)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The CRC carried in the last two octets, if the frame is long enough.
    pub fn trailing_crc(&self) -> Option<u16> {
        let n = self.0.len();
        (n >= 2).then(|| u16::from_le_bytes([self.0[n - 2], self.0[n - 1]]))
    }

    /// Checks the trailing CRC against the body.
    pub fn verify_crc(&self) -> Result<()> {
        let found = self
            .trailing_crc()
            .ok_or(ModbusError::MalformedFrame("shorter than a crc"))?;
        let computed = crc16(&self.0[..self.0.len() - 2]);
        if computed == found {
            Ok(())
        } else {
            Err(ModbusError::CrcMismatch { computed, found })
        }
    }

    /// Address and function octets of a CRC-valid frame.
    pub fn header(&self) -> Result<(u8, u8)> {
        if self.0.len() < 4 {
            return Err(ModbusError::MalformedFrame("shorter than address, function and crc"));
        }
        self.verify_crc()?;
        Ok((self.0[0], self.0[1]))
    }
}

impl fmt::Debug for WireFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WireFrame[")?;
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{b:02X}")?;
        }
        write!(f, "]")
    }
}

impl AsRef<[u8]> for WireFrame {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub fn encode_read_request(req: &ReadRequest) -> WireFrame {
    let mut body = Vec::with_capacity(8);
    body.push(req.device.get());
    body.push(READ_HOLDING_REGISTERS);
    body.extend_from_slice(&req.start.to_be_bytes());
    body.extend_from_slice(&req.count.to_be_bytes());
    WireFrame::seal(body)
}

/// Slave-side parse of a read request.
pub fn decode_read_request(frame: &WireFrame) -> Result<ReadRequest> {
    let (address, function) = frame.header()?;
    if function != READ_HOLDING_REGISTERS {
        return Err(ModbusError::UnsupportedFunction(function));
    }
    let b = frame.as_bytes();
    if b.len() != 8 {
        return Err(ModbusError::MalformedFrame("read request must be 8 octets"));
    }
    let device = DeviceAddress::new(address)?;
    let start = u16::from_be_bytes([b[2], b[3]]);
    let count = u16::from_be_bytes([b[4], b[5]]);
    ReadRequest::new(device, start, count)
}

pub fn encode_read_response(device: DeviceAddress, values: &[u16]) -> Result<WireFrame> {
    if values.is_empty() || values.len() > MAX_READ_COUNT as usize {
        return Err(ModbusError::InvalidCount(values.len()));
    }
    let mut body = Vec::with_capacity(5 + 2 * values.len());
    body.push(device.get());
    body.push(READ_HOLDING_REGISTERS);
    body.push((2 * values.len()) as u8);
    for v in values {
        body.extend_from_slice(&v.to_be_bytes());
    }
    Ok(WireFrame::seal(body))
}

pub fn encode_exception(device: DeviceAddress, code: ExceptionCode) -> WireFrame {
    WireFrame::seal(vec![
        device.get(),
        READ_HOLDING_REGISTERS | EXCEPTION_FLAG,
        code as u8,
    ])
}

/// Master-side parse of a reply to a request for `expected_count` registers.
pub fn decode_read_response(frame: &WireFrame, expected_count: usize) -> Result<ReadOutcome> {
    if expected_count == 0 || expected_count > MAX_READ_COUNT as usize {
        return Err(ModbusError::InvalidCount(expected_count));
    }
    let b = frame.as_bytes();
    if b.len() < 5 {
        return Err(ModbusError::MalformedFrame("response shorter than 5 octets"));
    }
    let (address, function) = frame.header()?;
    let device = DeviceAddress::new(address)?;
    match function {
        READ_HOLDING_REGISTERS => {
            let byte_count = b[2] as usize;
            if b.len() != 5 + byte_count {
                return Err(ModbusError::MalformedFrame("byte count disagrees with frame length"));
            }
            if !byte_count.is_multiple_of(2) {
                return Err(ModbusError::MalformedFrame("odd byte count"));
            }
            if byte_count != 2 * expected_count {
                return Err(ModbusError::CountMismatch {
                    expected: expected_count,
                    found: byte_count / 2,
                });
            }
            let values = b[3..3 + byte_count]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect();
            Ok(ReadOutcome::Registers(ReadResponse { device, values }))
        }
        f if f == READ_HOLDING_REGISTERS | EXCEPTION_FLAG => {
            if b.len() != 5 {
                return Err(ModbusError::MalformedFrame("exception response must be 5 octets"));
            }
            let code = ExceptionCode::try_from(b[2])
                .map_err(|_| ModbusError::MalformedFrame("unknown exception code"))?;
            Ok(ReadOutcome::Exception(ExceptionResponse { device, code }))
        }
        other => Err(ModbusError::UnsupportedFunction(other)),
    }
}
