pub mod oracle;
pub mod mock_service;
